import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rydrx.atomic import load_species  # noqa: E402
from rydrx.doppler import VaporConfig  # noqa: E402
from rydrx.lindblad import DriveField, four_level, three_level  # noqa: E402

TP = 2 * math.pi
GAMMA_R = TP * 0.3e6
DEPHASING_R = TP * 0.5e6

ACCEPTANCE = []


def record_acceptance(label, ok, detail=""):
    """Remember an acceptance verdict; the summary hook prints one line each."""
    ACCEPTANCE.append((label, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split(":")[0][2:])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")


@pytest.fixture(scope="session")
def rb():
    return load_species("Rb87")


@pytest.fixture(scope="session")
def vapor(rb):
    return VaporConfig.for_species(rb)


@pytest.fixture(scope="session")
def sys3(rb):
    return three_level(rb.intermediate_decay_rate, GAMMA_R, DEPHASING_R)


@pytest.fixture(scope="session")
def sys4(rb):
    return four_level(rb.intermediate_decay_rate, GAMMA_R, DEPHASING_R)


def ladder_drives(probe_hz, coupler_hz, rf_hz=None, rf_detuning_hz=0.0, **env):
    d = [DriveField("g", "e", TP * probe_hz, role="probe"),
         DriveField("e", "r", TP * coupler_hz, role="coupler", **env.get("coupler", {}))]
    if rf_hz is not None:
        d.append(DriveField("r", "r2", TP * rf_hz, detuning=TP * rf_detuning_hz, role="rf",
                            **env.get("rf", {})))
    return d


def coupler_grid(points=801, half_hz=60e6):
    return np.linspace(-TP * half_hz, TP * half_hz, points)


BLOCK_COMMANDS = {"spectrum": "spectrum", "pulse": "pulse", "phase": "phase-scan",
                  "demod": "demod", "estimate": "estimate"}


def run_cli(*args, cwd=None):
    import subprocess
    import time
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "rydrx.cli", *map(str, args)], cwd=cwd,
                          capture_output=True, text=True)
    return proc, time.perf_counter() - t0


@pytest.fixture(scope="session")
def bundled_runs(tmp_path_factory):
    """Every bundled scenario through every subcommand it defines, twice.

    Returns {(scenario, subcommand): (dir_a, dir_b, seconds_a)}.
    """
    from rydrx.scenario import bundled_scenarios, load_scenario
    root = tmp_path_factory.mktemp("bundled")
    runs = {}
    for name, path in bundled_scenarios().items():
        sc = load_scenario(path)
        for block, cmd in BLOCK_COMMANDS.items():
            if getattr(sc, block) is None:
                continue
            dirs, secs = [], None
            for rep in "ab":
                d = root / rep
                proc, dt = run_cli(cmd, name, "-o", d)
                assert proc.returncode == 0, proc.stderr
                dirs.append(d)
                secs = dt if secs is None else secs
            runs[(name, cmd)] = (dirs[0], dirs[1], secs)
    return runs

import os
import subprocess
import sys
from pathlib import Path

from cfaudit.learn import _backend

ROOT = Path(__file__).resolve().parents[1]


def backend_in_subprocess(**env):
    code = "from cfaudit.learn import BACKEND; print(BACKEND)"
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                          env={**os.environ, **env}, check=True)
    return proc.stdout.strip()


def test_env_forces_pure_python():
    assert backend_in_subprocess(CFAUDIT_PURE_PYTHON="1") == "python"


def test_default_prefers_compiled_when_built():
    expected = "cython" if "cython" in _backend.available() else "python"
    assert backend_in_subprocess(CFAUDIT_PURE_PYTHON="") == expected


def test_benchmark_runs():
    proc = subprocess.run(
        [sys.executable, str(ROOT / "benchmarks" / "bench_kernels.py"), "--rows", "3000", "--rounds", "3", "--repeat", "1"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "histogram ms" in proc.stdout

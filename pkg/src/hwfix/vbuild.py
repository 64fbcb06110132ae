"""Compile a Verilog testbench into a runnable binary with Verilator.

Verilator's own driver rebuilds its C++ runtime for every model, which costs
several seconds per candidate.  This helper compiles the runtime once per
toolchain, keeps the object files and a precompiled runtime header in a cache
directory and reuses them, so each new build only compiles the generated model.

Usage::

    python -m hwfix.vbuild --top tb --out build/ a.v b.v tb.v
    build/sim
"""

from __future__ import annotations

import argparse
import hashlib
import os
import shlex
import shutil
import subprocess
import sys
from pathlib import Path

from filelock import FileLock

RUNTIME_OBJECTS = ("verilated.o", "verilated_threads.o", "verilated_timing.o")
PCH_HEADER = "hwfix_pre.h"
_WARN_FLAGS = ["-Wno-fatal", "-Wno-lint", "-Wno-style", "-Wno-MULTIDRIVEN"]


def verilator_root() -> Path | None:
    """Locate a Verilator installation (pip wheel first, then PATH)."""
    env = os.environ.get("VERILATOR_ROOT")
    if env and (Path(env) / "bin" / "verilator").exists():
        return Path(env)
    try:
        import verilator  # pip wheel ships the full tree inside the package
        root = Path(verilator.__file__).resolve().parent
        if (root / "bin" / "verilator").exists():
            return root
    except ImportError:
        pass
    exe = shutil.which("verilator")
    if exe:
        out = subprocess.run([exe, "--getenv", "VERILATOR_ROOT"], capture_output=True, text=True)
        if out.returncode == 0 and out.stdout.strip():
            return Path(out.stdout.strip())
    return None


def build_env(root: Path) -> dict[str, str]:
    env = dict(os.environ)
    env["VERILATOR_ROOT"] = str(root)
    env.setdefault("CXXFLAGS", "--std=c++20 -DVL_TIME_CONTEXT")
    return env


def cache_dir(root: Path) -> Path:
    base = Path(os.environ.get("HWFIX_CACHE", Path.home() / ".cache" / "hwfix"))
    cxx = os.environ.get("CXX", "g++")
    key = hashlib.sha256(f"{root}|{cxx}|{os.environ.get('CXXFLAGS', '')}".encode()).hexdigest()[:16]
    return base / f"vruntime-{key}"


def _make_cmd(obj_dir: Path, top_class: str, jobs: int, *extra) -> list[str]:
    return ["make", "-C", str(obj_dir), "-f", f"{top_class}.mk", f"-j{jobs}",
            "PYTHON3=" + (shutil.which("python3") or sys.executable),
            "OPT_FAST=-O0", "OPT_SLOW=-O0", *extra]


def _build_pch(obj_dir: Path, top_class: str, env, cache: Path) -> None:
    """Precompile the runtime headers with the exact flags make would use."""
    dry = subprocess.run(_make_cmd(obj_dir, top_class, 1, "-n", "-B"), env=env,
                         capture_output=True, text=True)
    line = next((ln for ln in dry.stdout.splitlines() if f"-o {top_class}__ALL.o" in ln), None)
    if line is None:
        return
    argv = [a for a in shlex.split(line.split(f"-c -o {top_class}__ALL.o")[0]) if a != "-MMD"]
    header = cache / PCH_HEADER
    header.write_text('#include "verilated.h"\n#include "verilated_timing.h"\n')
    tmp = cache / (PCH_HEADER + ".gch.tmp")
    res = subprocess.run([*argv, "-x", "c++-header", str(header), "-o", str(tmp)],
                         cwd=obj_dir, env=env, capture_output=True, text=True)
    if res.returncode == 0:
        os.replace(tmp, cache / (PCH_HEADER + ".gch"))
    else:
        tmp.unlink(missing_ok=True)


def _make(obj_dir: Path, top_class: str, env, jobs: int, cache: Path | None) -> subprocess.CompletedProcess:
    if cache is not None and (cache / (PCH_HEADER + ".gch")).exists():
        # through the environment so verilated.mk can still append its -I flags;
        # a stale or mismatched pch is ignored by the compiler, never fatal
        env = {**env, "CPPFLAGS": f"{env.get('CPPFLAGS', '')} -include {cache / PCH_HEADER}".strip()}
    return subprocess.run(["make", "-s", *_make_cmd(obj_dir, top_class, jobs)[1:]],
                          env=env, capture_output=True, text=True)


def build(files: list[str], top: str, out: Path, jobs: int = 4) -> int:
    """Build ``files`` with top module ``top`` into ``out/sim``.

    Returns the process-style status (0 on success) and leaves compiler
    diagnostics on stderr.
    """
    root = verilator_root()
    if root is None:
        print("verilator not found", file=sys.stderr)
        return 127
    env = build_env(root)
    out.mkdir(parents=True, exist_ok=True)
    obj_dir = out / "obj"
    top_class = "V" + top
    cmd = [str(root / "bin" / "verilator"), "--cc", "--exe", "--main", "--timing",
           *_WARN_FLAGS, "--top-module", top, "--prefix", top_class,
           "-Mdir", str(obj_dir), *files]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if res.returncode != 0:
        sys.stderr.write(res.stdout + res.stderr)
        return res.returncode

    cache = cache_dir(root)
    cache.mkdir(parents=True, exist_ok=True)
    cached = all((cache / name).exists() for name in RUNTIME_OBJECTS)
    if cached:
        for name in RUNTIME_OBJECTS:
            dst = obj_dir / name
            shutil.copy2(cache / name, dst)
            os.utime(dst)
    if not (cache / (PCH_HEADER + ".gch")).exists():
        with FileLock(str(cache) + ".lock"):
            if not (cache / (PCH_HEADER + ".gch")).exists():
                _build_pch(obj_dir, top_class, env, cache)
    res = _make(obj_dir, top_class, env, jobs, cache)
    if res.returncode != 0:
        sys.stderr.write(res.stdout + res.stderr)
        return res.returncode
    if not cached:
        with FileLock(str(cache) + ".lock"):
            for name in RUNTIME_OBJECTS:
                if (obj_dir / name).exists() and not (cache / name).exists():
                    tmp = cache / (name + ".tmp")
                    shutil.copy2(obj_dir / name, tmp)
                    os.replace(tmp, cache / name)
    sim = out / "sim"
    if sim.exists() or sim.is_symlink():
        sim.unlink()
    shutil.copy2(obj_dir / top_class, sim)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m hwfix.vbuild", description=__doc__.splitlines()[0])
    ap.add_argument("--top", required=True)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("-j", "--jobs", type=int, default=int(os.environ.get("HWFIX_MAKE_JOBS", "4")))
    ap.add_argument("files", nargs="+")
    args = ap.parse_args(argv)
    return build(args.files, args.top, args.out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())

"""Launch P1 and P2 as separate ``ppknn serve`` processes on localhost."""

import contextlib
import os
import socket
import subprocess
import sys
import time

CLI = [sys.executable, "-m", "ppknn.cli"]


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for_port(port: int, proc: subprocess.Popen, timeout: float = 30.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if proc.poll() is not None:
            raise RuntimeError(f"server exited early with {proc.returncode}: {proc.stderr.read()}")
        try:
            socket.create_connection(("127.0.0.1", port), timeout=0.5).close()
            return
        except OSError:
            time.sleep(0.1)
    raise TimeoutError(f"nothing listening on {port}")


def run_cli(*args, timeout: float = 300, check: bool = False) -> subprocess.CompletedProcess:
    proc = subprocess.run(
        [*CLI, *map(str, args)], capture_output=True, text=True, timeout=timeout, env=_env()
    )
    if check and proc.returncode != 0:
        raise AssertionError(f"ppknn {args} failed: {proc.stderr}")
    return proc


def _env():
    env = dict(os.environ)
    env.setdefault("PYTHONUNBUFFERED", "1")
    return env


def _spawn(*args) -> subprocess.Popen:
    return subprocess.Popen(
        [*CLI, *map(str, args)], stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=_env()
    )


@contextlib.contextmanager
def served(key_file, pub_file, db_file, seed=None):
    """Yield (user_port, p1_proc, p2_proc) with both parties running."""
    p2_port, user_port = free_port(), free_port()
    p2 = _spawn("serve", "--role", "p2", "--listen", f"127.0.0.1:{p2_port}", "--key", key_file)
    procs = [p2]
    try:
        wait_for_port(p2_port, p2)
        extra = ["--seed", seed] if seed is not None else []
        p1 = _spawn(
            "serve", "--role", "p1", "--connect", f"127.0.0.1:{p2_port}",
            "--listen", f"127.0.0.1:{user_port}", "--db", db_file, "--pub", pub_file, *extra,
        )
        procs.append(p1)
        wait_for_port(user_port, p1)
        yield user_port, p1, p2
    finally:
        for proc in procs:
            if proc.poll() is None:
                proc.terminate()
            try:
                proc.communicate(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()

"""Minimal one-shot runner speaking the framed protocol, for client tests.

It does not execute anything. The reply depends on a keyword in the code.
The first argument, if given, is a file that receives this process's pid.
"""
import json
import os
import struct
import sys
import time

if len(sys.argv) > 1:
    with open(sys.argv[1], "w") as f:
        f.write(str(os.getpid()))

(n,) = struct.unpack(">I", sys.stdin.buffer.read(4))
req = json.loads(sys.stdin.buffer.read(n))
code = req["code"]

if "hang" in code:
    while True:
        time.sleep(1)

if "silent" in code:
    res = {"status": "no_objective", "objective": None}
elif "crash" in code:
    res = {"status": "exec_error", "objective": None, "stderr_tail": "Traceback\nZeroDivisionError: division by zero\n"}
else:
    res = {"status": "ok", "objective": "12"}
res.setdefault("stdout_tail", "")
res.setdefault("stderr_tail", "")
res["wall_time"] = 0.01
body = json.dumps(res).encode()
sys.stdout.buffer.write(struct.pack(">I", len(body)) + body)
sys.stdout.buffer.flush()

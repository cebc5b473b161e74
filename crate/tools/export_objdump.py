#!/usr/bin/env python3
"""Artifact map exporter built on GNU binutils (x86-64 ELF, Intel syntax).

usage: export_objdump.py BINARY [-o OUT.json] [--binary-id ID]
"""

import argparse
import json
import re
import subprocess
import sys
from pathlib import Path

FUNC_RE = re.compile(r"^([0-9a-f]+) <(.+)>:$")
INSN_RE = re.compile(r"^\s*([0-9a-f]+):\t(.*?)\s*$")
BRANCH_RE = re.compile(r"^(j\w+|call)\s+([0-9a-f]+)\s+<")
COMMENT_RE = re.compile(r"#\s*([0-9a-f]+)\s+<")
IMM_RE = re.compile(r"0x([0-9a-f]+)")
SYM_RE = re.compile(r"^([0-9a-f]+)\s+(\w)\s+(\w?)\s+(\S+)\s+([0-9a-f]+)\s+(\S+)$")


def objdump(*args):
    return subprocess.run(["objdump", *args], check=True, capture_output=True, text=True).stdout


def hexaddr(a):
    return "0x%x" % a


def symbols(binary):
    funcs, objects = {}, {}
    for line in objdump("-t", binary).splitlines():
        m = SYM_RE.match(line.replace("\t", " "))
        if not m:
            continue
        addr, kind, section, name = int(m.group(1), 16), m.group(3), m.group(4), m.group(6)
        if kind == "F" and section == ".text":
            funcs[addr] = name
        elif kind == "O" and section in (".data", ".bss", ".rodata"):
            objects[addr] = name
    return funcs, objects


def strings(binary, min_len=4):
    try:
        dump = objdump("-s", "-j", ".rodata", binary)
    except subprocess.CalledProcessError:
        return {}
    data, base = bytearray(), None
    for line in dump.splitlines():
        parts = line.split()
        if len(parts) < 2 or not re.fullmatch(r"[0-9a-f]+", parts[0]):
            continue
        if base is None:
            base = int(parts[0], 16)
        for chunk in parts[1:5]:
            if re.fullmatch(r"[0-9a-f]{2,8}", chunk):
                data += bytes.fromhex(chunk)
    found, start = {}, 0
    for i, b in enumerate(data + b"\0"):
        if b == 0 or not (32 <= b < 127):
            if b == 0 and i - start >= min_len:
                found[base + start] = data[start:i].decode("ascii")
            start = i + 1
    return found


def disassembly(binary):
    funcs, current = {}, None
    for line in objdump("-d", "--no-show-raw-insn", "-M", "intel", "-j", ".text", binary).splitlines():
        m = FUNC_RE.match(line)
        if m:
            current = funcs.setdefault(int(m.group(1), 16), [])
            continue
        m = INSN_RE.match(line)
        if m and current is not None and m.group(2):
            current.append((int(m.group(1), 16), re.sub(r"\s+", " ", m.group(2))))
    return funcs


def split_blocks(entry, insns):
    leaders = {entry}
    for i, (addr, text) in enumerate(insns):
        m = BRANCH_RE.match(text)
        ends = text.startswith(("ret", "jmp", "hlt")) or (m and m.group(1) != "call")
        if m and m.group(1) != "call":
            leaders.add(int(m.group(2), 16))
        if ends and i + 1 < len(insns):
            leaders.add(insns[i + 1][0])
    blocks = []
    for addr, text in insns:
        if addr in leaders or not blocks:
            blocks.append({"addr": addr, "lines": []})
        blocks[-1]["lines"].append(text)
    return blocks


def export(binary, binary_id):
    names, objects = symbols(binary)
    lits = strings(binary)
    funcs = disassembly(binary)
    functions, xrefs = [], []
    for entry in sorted(funcs):
        name = names.get(entry) or "sub_%x" % entry
        blocks = split_blocks(entry, funcs[entry])
        for block in blocks:
            for text in block["lines"]:
                m = BRANCH_RE.match(text)
                if m and m.group(1) == "call" and int(m.group(2), 16) in funcs:
                    xrefs.append((block["addr"], int(m.group(2), 16), "call"))
                targets = [int(x, 16) for x in COMMENT_RE.findall(text)] + [int(x, 16) for x in IMM_RE.findall(text)]
                for t in targets:
                    if t in lits:
                        xrefs.append((block["addr"], t, "string"))
                    elif t in objects:
                        xrefs.append((block["addr"], t, "data"))
        functions.append({
            "entry": hexaddr(entry),
            "name": name,
            "blocks": [{"addr": hexaddr(b["addr"]), "lines": b["lines"]} for b in blocks],
        })
    return {
        "binary_id": binary_id,
        "functions": functions,
        "globals": [{"addr": hexaddr(a), "name": n, "type": "undefined"} for a, n in sorted(objects.items())],
        "strings": [{"addr": hexaddr(a), "literal": s} for a, s in sorted(lits.items())],
        "xrefs": [{"from": hexaddr(f), "to": hexaddr(t), "kind": k} for f, t, k in sorted(set(xrefs))],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("binary")
    ap.add_argument("-o", "--out")
    ap.add_argument("--binary-id")
    args = ap.parse_args()
    doc = export(args.binary, args.binary_id or Path(args.binary).name)
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text + "\n")


if __name__ == "__main__":
    main()

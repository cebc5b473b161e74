#!/usr/bin/env python3
"""Binary Ninja (headless API) exporter for the artifact map interchange file.

usage: export_binja.py BINARY [-o OUT.json]
"""

import argparse
import json
from pathlib import Path

import binaryninja


def hexaddr(a):
    return "0x%x" % a


def block_lines(block):
    return ["".join(tok.text for tok in line.tokens).strip() for line in block.disassembly_text]


def export(bv):
    strings = {s.start: s.value for s in bv.get_strings()}
    globals_ = {}
    for var in bv.data_vars.values():
        sym = bv.get_symbol_at(var.address)
        if sym is not None and var.address not in strings:
            globals_[var.address] = (sym.name, str(var.type))

    functions, xrefs = [], set()
    for func in bv.functions:
        if func.symbol.type == binaryninja.SymbolType.ImportedFunctionSymbol:
            continue
        blocks = []
        for block in sorted(func.basic_blocks, key=lambda b: b.start):
            lines = [line for line in block_lines(block) if line]
            if not lines:
                continue
            blocks.append({"addr": hexaddr(block.start), "lines": lines})
            for callee in func.call_sites:
                if block.start <= callee.address < block.end:
                    for target in bv.get_callees(callee.address):
                        if bv.get_function_at(target) is not None:
                            xrefs.add((block.start, target, "call"))
            for addr in range(block.start, block.end):
                for ref in bv.get_code_refs_from(addr) if hasattr(bv, "get_code_refs_from") else []:
                    if ref in strings:
                        xrefs.add((block.start, ref, "string"))
                    elif ref in globals_:
                        xrefs.add((block.start, ref, "data"))
        functions.append({"entry": hexaddr(func.start), "name": func.name, "blocks": blocks})

    return {
        "binary_id": Path(bv.file.filename).name,
        "functions": functions,
        "globals": [{"addr": hexaddr(a), "name": n, "type": t} for a, (n, t) in sorted(globals_.items())],
        "strings": [{"addr": hexaddr(a), "literal": s} for a, s in sorted(strings.items())],
        "xrefs": [{"from": hexaddr(f), "to": hexaddr(t), "kind": k} for f, t, k in sorted(xrefs)],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("binary")
    ap.add_argument("-o", "--out")
    args = ap.parse_args()
    with binaryninja.load(args.binary) as bv:
        doc = export(bv)
    out = args.out or Path(args.binary).name + ".json"
    Path(out).write_text(json.dumps(doc, indent=1))


if __name__ == "__main__":
    main()

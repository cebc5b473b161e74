"""IDAPython script writing the artifact map interchange file.

    idat64 -A -S"export_ida.py out.json" <binary>
"""

import json

import ida_auto
import ida_bytes
import ida_funcs
import ida_gdl
import ida_lines
import ida_nalt
import ida_pro
import ida_xref
import idautils
import idc


def hexaddr(ea):
    return "0x%x" % ea


def block_lines(block):
    lines, ea = [], block.start_ea
    while ea < block.end_ea:
        lines.append(ida_lines.tag_remove(idc.generate_disasm_line(ea, 0) or "").strip())
        ea = idc.next_head(ea, block.end_ea)
    return [line for line in lines if line]


def main():
    ida_auto.auto_wait()
    out = idc.ARGV[1] if len(idc.ARGV) > 1 else ida_nalt.get_root_filename() + ".json"

    strings = {s.ea: str(s) for s in idautils.Strings()}
    globals_ = {}
    for ea, name in idautils.Names():
        flags = ida_bytes.get_flags(ea)
        if ida_bytes.is_data(flags) and ea not in strings:
            globals_[ea] = (name, idc.get_type(ea) or "undefined")

    functions, xrefs = [], set()
    for entry in idautils.Functions():
        func = ida_funcs.get_func(entry)
        if func.flags & (ida_funcs.FUNC_LIB | ida_funcs.FUNC_THUNK):
            continue
        blocks = []
        for block in ida_gdl.FlowChart(func):
            lines = block_lines(block)
            if not lines:
                continue
            blocks.append({"addr": hexaddr(block.start_ea), "lines": lines})
            for head in idautils.Heads(block.start_ea, block.end_ea):
                for ref in idautils.XrefsFrom(head, ida_xref.XREF_FAR):
                    if ref.type in (ida_xref.fl_CN, ida_xref.fl_CF) and ida_funcs.get_func(ref.to):
                        if ida_funcs.get_func(ref.to).start_ea == ref.to:
                            xrefs.add((block.start_ea, ref.to, "call"))
                    elif ref.to in strings:
                        xrefs.add((block.start_ea, ref.to, "string"))
                    elif ref.to in globals_:
                        xrefs.add((block.start_ea, ref.to, "data"))
        functions.append({"entry": hexaddr(entry), "name": ida_funcs.get_func_name(entry), "blocks": blocks})

    doc = {
        "binary_id": ida_nalt.get_root_filename(),
        "functions": functions,
        "globals": [{"addr": hexaddr(a), "name": n, "type": t} for a, (n, t) in sorted(globals_.items())],
        "strings": [{"addr": hexaddr(a), "literal": s} for a, s in sorted(strings.items())],
        "xrefs": [{"from": hexaddr(f), "to": hexaddr(t), "kind": k} for f, t, k in sorted(xrefs)],
    }
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=1)
    ida_pro.qexit(0)


main()

# Ghidra headless post-script writing the artifact map interchange file.
#
#   analyzeHeadless <proj_dir> <proj> -import <binary> \
#       -postScript export_ghidra.py <out.json>
#
# Runs under Ghidra's Jython (Python 2).
# @category Export

import json

from ghidra.program.model.block import BasicBlockModel
from ghidra.program.model.data import StringDataInstance
from ghidra.program.model.symbol import RefType


def hexaddr(addr):
    return "0x%x" % addr.getOffset()


def block_lines(listing, block):
    lines = []
    it = listing.getInstructions(block, True)
    while it.hasNext():
        lines.append(it.next().toString())
    return lines


def main():
    args = getScriptArgs()
    out = args[0] if args else currentProgram.getName() + ".json"
    listing = currentProgram.getListing()
    model = BasicBlockModel(currentProgram)
    refs = currentProgram.getReferenceManager()

    functions, known_blocks = [], {}
    for func in currentProgram.getFunctionManager().getFunctions(True):
        if func.isExternal() or func.isThunk():
            continue
        blocks = []
        it = model.getCodeBlocksContaining(func.getBody(), monitor)
        while it.hasNext():
            block = it.next()
            lines = block_lines(listing, block)
            if lines:
                blocks.append({"addr": hexaddr(block.getFirstStartAddress()), "lines": lines})
                known_blocks[block.getFirstStartAddress()] = block
        functions.append({"entry": hexaddr(func.getEntryPoint()), "name": func.getName(), "blocks": blocks})

    strings, globals_ = {}, {}
    for data in listing.getDefinedData(True):
        sdi = StringDataInstance.getStringDataInstance(data)
        if sdi is not StringDataInstance.NULL_INSTANCE and sdi.getStringValue():
            strings[data.getAddress()] = sdi.getStringValue()
        else:
            sym = currentProgram.getSymbolTable().getPrimarySymbol(data.getAddress())
            if sym is not None:
                globals_[data.getAddress()] = (sym.getName(), data.getDataType().getName())

    xrefs = set()
    for start, block in known_blocks.items():
        it = listing.getInstructions(block, True)
        while it.hasNext():
            insn = it.next()
            for ref in refs.getReferencesFrom(insn.getAddress()):
                to = ref.getToAddress()
                if ref.getReferenceType().isCall() and currentProgram.getFunctionManager().getFunctionAt(to):
                    xrefs.add((hexaddr(start), hexaddr(to), "call"))
                elif to in strings:
                    xrefs.add((hexaddr(start), hexaddr(to), "string"))
                elif to in globals_ and ref.getReferenceType() != RefType.FLOW:
                    xrefs.add((hexaddr(start), hexaddr(to), "data"))

    doc = {
        "binary_id": currentProgram.getName(),
        "functions": functions,
        "globals": [{"addr": hexaddr(a), "name": n, "type": t} for a, (n, t) in sorted(globals_.items())],
        "strings": [{"addr": hexaddr(a), "literal": s} for a, s in sorted(strings.items())],
        "xrefs": [{"from": f, "to": t, "kind": k} for f, t, k in sorted(xrefs)],
    }
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=1)
    print("wrote %d functions to %s" % (len(functions), out))


main()

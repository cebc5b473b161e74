"""Smoke test for the retrace extension module.

Build it first:  pip install --no-build-isolation ./crates/py
(or `maturin develop -m crates/py/Cargo.toml` inside a virtualenv).
"""

import json
import sys
import tempfile
from pathlib import Path

import retrace


def main() -> int:
    assert retrace.levenshtein("kitten", "sitting") == 3
    assert retrace.similarity_score("abc", "abc") == 100
    assert retrace.similarity_score("main", "rnain") < 100
    assert retrace.sanitize_symbol("*FUN_0010ed40") == retrace.sanitize_symbol("fun_0010ed40")

    report = retrace.summarize_function_eval(
        [("A", (360, 1, 1, 135, 3)), ("B", (405, 7, 4, 82, 2)), ("C", (328, 6, 9, 156, 1))]
    )
    assert round(report["total"]["overall_accuracy_pct"], 1) == 97.7, report["total"]

    words = retrace.aggregate_keystrokes(
        [{"t": 0, "type": "key", "key": "a"}, {"t": 100, "type": "key", "key": "b"},
         {"t": 200, "type": "key", "key": "Backspace"}, {"t": 300, "type": "key", "key": "c"}]
    )
    assert words == [("ac", 0, 300)], words

    intervals = retrace.consolidate([(i * 1000, 0x1000) for i in range(12)], 5000, 5000)
    assert intervals == [(0x1000, 0, 11000)], intervals

    sample = retrace.stratified_sample([("s1", "p1", 20), ("s2", "p2", 20)], 3, 7)
    assert len(sample) == 6
    assert sample == retrace.stratified_sample([("s2", "p2", 20), ("s1", "p1", 20)], 3, 7)

    with tempfile.TemporaryDirectory() as tmp:
        bundle = retrace.write_demo_bundle(Path(tmp) / "demo")
        assert bundle.frame_count > 0
        assert bundle.manifest()["session_id"] == bundle.session_id
        png = bundle.frame_png(0)
        assert png[:8] == b"\x89PNG\r\n\x1a\n"
        w, h, rgba = bundle.frame_rgba(0)
        assert len(rgba) == w * h * 4

        out = retrace.run_pipeline(str(bundle.path))
        kinds = [a["kind"] for a in out["annotations"]]
        assert "Rename" in kinds and "FunctionView" in kinds, kinds
        assert out["report"]["frames"] == bundle.frame_count

        current = bundle.annotations()
        target = next(a for a in current if a["kind"] == "FunctionView")
        confirmed = bundle.set_status(target["id"], "confirmed", "smoke")
        assert confirmed["supersedes"] == target["id"]
        try:
            bundle.set_status(target["id"], "rejected")
        except retrace.RetraceError:
            pass
        else:
            raise AssertionError("editing a superseded record must fail")

        mark = bundle.add_annotation("TaskMark", {"label": "gave up"}, 1000)
        assert mark["status"] == "manual"
        assert any(a["id"] == mark["id"] for a in bundle.annotations())
        assert bundle.timeline("csv").splitlines()[0].startswith("id,t_start")
        assert bundle.scatter_csv().startswith("t,function_ordinal,entry")

        manifest = bundle.manifest()
        index = retrace.SymbolIndex(str(Path(bundle.path) / "artifacts" / f"{manifest['binary_id']}.json"))
        assert index.function_count > 0
        label = index.match_tokens(["MOV", "EAX"])
        assert label["label"] == "no_function", label

    try:
        retrace.SessionBundle("/nonexistent/bundle")
    except retrace.RetraceError as e:
        assert "missing" in str(e)
    else:
        raise AssertionError("loading a missing bundle must fail")

    print(json.dumps({"ok": True, "version": retrace.TOOL_VERSION}))
    return 0


if __name__ == "__main__":
    sys.exit(main())

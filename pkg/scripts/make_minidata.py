"""Regenerate src/recsys_lens/data/mini.csv from its fixed seed."""

from pathlib import Path

from recsys_lens.minidata import generate

out = Path(__file__).resolve().parents[1] / "src" / "recsys_lens" / "data" / "mini.csv"
out.write_text(generate(), encoding="utf-8", newline="\n")
print(f"wrote {out}")

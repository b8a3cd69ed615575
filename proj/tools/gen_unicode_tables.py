#!/usr/bin/env python3
"""Emit src/tokenizer/unicode_ranges.inc: code point ranges for the letter (L*) and
number (N*) general categories used by the byte-level BPE pre-tokenizer."""
import os
import sys
import unicodedata

OUT = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                   "src", "tokenizer", "unicode_ranges.inc")


def ranges(pred):
    out, start = [], None
    for cp in range(0x110000):
        hit = pred(unicodedata.category(chr(cp)))
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def emit(f, name, rs):
    f.write(f"inline constexpr CodepointRange {name}[] = {{\n")
    for lo, hi in rs:
        f.write(f"    {{0x{lo:05X}, 0x{hi:05X}}},\n")
    f.write("};\n\n")


with open(OUT, "w") as f:
    f.write(f"// Generated by tools/gen_unicode_tables.py (Unicode {unicodedata.unidata_version}). Do not edit.\n\n")
    emit(f, "kLetterRanges", ranges(lambda c: c.startswith("L")))
    emit(f, "kNumberRanges", ranges(lambda c: c.startswith("N")))
print(OUT, file=sys.stderr)

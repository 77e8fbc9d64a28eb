#!/usr/bin/env python3
"""Regenerates assets/fonts/bundled-sans.ttf from NanumGothic (SIL OFL 1.1).

Keeps printable ASCII, the CJK ideographs used by the chinese-mini preset (plus
a few spares), and the 2,350 KS X 1001 Hangul syllables.

    python3 tools/subset_font.py NanumGothic.ttf assets/fonts/bundled-sans.ttf
"""
import sys

from fontTools import subset
from fontTools.ttLib import TTFont

HANJA = (
    "一二三四五六七八九十百千萬人大小中上下山水火木金土日月天地風雲雨雪花草鳥魚馬牛羊犬"
    "心手口目耳足力刀文字書學生先明白黑紅長高左右東西南北春夏秋冬年時分家國王子女父母兄弟"
    "友好愛美永光石田川林森竹米貝車門電音食飲言語讀寫走立見行來去出入多少新古正方內外前後"
    "半同合回道路海江河湖"
)


def ks_hangul():
    out = []
    for hi in range(0xB0, 0xC9):
        for lo in range(0xA1, 0xFF):
            try:
                out.append(ord(bytes([hi, lo]).decode("euc-kr")))
            except UnicodeDecodeError:
                pass
    return out


def main(src, dst):
    cps = set(range(0x20, 0x7F)) | {ord(c) for c in HANJA} | set(ks_hangul())
    font = TTFont(src)
    cmap = font.getBestCmap()
    cps = sorted(c for c in cps if c in cmap)
    opts = subset.Options()
    opts.hinting = False
    opts.layout_features = []
    opts.name_IDs = ["*"]
    opts.notdef_outline = True
    sub = subset.Subsetter(opts)
    sub.populate(unicodes=cps)
    sub.subset(font)
    # Reserved font names may not be carried by modified versions.
    for rec in font["name"].names:
        if rec.nameID in (1, 3, 4, 6, 16, 17):
            rec.string = "AnyGlyph Bundled Sans" if rec.nameID != 6 else "AnyGlyphBundledSans"
        elif rec.nameID == 2:
            rec.string = "Regular"
    font.save(dst)
    print(f"{len(cps)} codepoints -> {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

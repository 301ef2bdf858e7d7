"""Dataset loading and procedural generation."""

from contextmeta.datasets.cache import load_dataset, save_dataset
from contextmeta.datasets.glyphs import (
    GlyphDataset,
    StrokeStyle,
    SyntheticSpec,
    gen_proc_glyphs,
    load_glyph_tree,
    render_strokes,
)
from contextmeta.datasets.sinusoid import SinusoidFamily, SinusoidTaskSource, gen_context_sinusoid
from contextmeta.errors import InputError


def generate(spec: SyntheticSpec):
    if spec.kind == "proc-glyphs":
        return gen_proc_glyphs(spec)
    if spec.kind == "context-sinusoid":
        return gen_context_sinusoid(spec)
    raise InputError(f"unknown synthetic dataset kind {spec.kind!r}")


__all__ = [
    "GlyphDataset", "SinusoidFamily", "SinusoidTaskSource", "StrokeStyle", "SyntheticSpec",
    "gen_context_sinusoid", "gen_proc_glyphs", "generate", "load_dataset", "load_glyph_tree",
    "render_strokes", "save_dataset",
]

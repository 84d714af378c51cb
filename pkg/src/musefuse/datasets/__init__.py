from musefuse.datasets.dsp import DURATION_FACTORS, PITCH_CENTS, pitch_shift, wsola_stretch
from musefuse.datasets.records import (
    DATASETS,
    BuildConfig,
    DatasetRecord,
    DirectorySource,
    SyntheticSource,
    build_adr_pairs,
    build_dataset,
    build_records,
    read_records,
    regenerate_pair,
)
from musefuse.datasets.synth import TrackSet
from musefuse.datasets.templates import TemplatePool, fill_template, load_pool

__all__ = [
    "DATASETS", "DURATION_FACTORS", "PITCH_CENTS", "BuildConfig", "DatasetRecord",
    "DirectorySource", "SyntheticSource", "TemplatePool", "TrackSet", "build_adr_pairs",
    "build_dataset", "build_records", "fill_template", "load_pool", "pitch_shift",
    "read_records", "regenerate_pair", "wsola_stretch",
]

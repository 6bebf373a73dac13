from vjepa_fer.videodata.augment import AugmentConfig, extract_and_transform
from vjepa_fer.videodata.clips import (
    CLIP_LENGTH, FRAME_SKIP, ClipSpec, clip_span, enumerate_clips, pad_video, padded_duration,
    sample_training_clips,
)
from vjepa_fer.videodata.folds import (
    FoldError, FoldPlan, FoldReport, cremad_table_plan, make_folds, split_records, verify_folds,
)
from vjepa_fer.videodata.manifest import VideoRecord, dataset_labels, read_manifest, write_manifest
from vjepa_fer.videodata.rvt import VideoTensor, load_video, store_video
from vjepa_fer.videodata.synthetic import SynthConfig, gen_synthetic

__all__ = [
    "AugmentConfig", "CLIP_LENGTH", "ClipSpec", "FRAME_SKIP", "FoldError", "FoldPlan", "FoldReport",
    "SynthConfig", "VideoRecord", "VideoTensor", "clip_span", "cremad_table_plan", "dataset_labels",
    "enumerate_clips", "extract_and_transform", "gen_synthetic", "load_video", "make_folds", "pad_video",
    "padded_duration", "read_manifest", "sample_training_clips", "split_records", "store_video",
    "verify_folds", "write_manifest",
]

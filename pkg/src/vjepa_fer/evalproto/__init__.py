from vjepa_fer.evalproto.evaluate import (
    FoldEval, HarmonizationMode, MetricsReport, confusion_from_votes, cross_evaluate, evaluate_fold,
    harmonize, harmonized_fold, model_scorer, score_videos, video_clips,
)
from vjepa_fer.evalproto.metrics import ConfusionMatrix, uar, war
from vjepa_fer.evalproto.pca import PcaResult, pca2
from vjepa_fer.evalproto.voting import VOTINGS, VideoPrediction, vote, vote_mv, vote_pbv

__all__ = [
    "ConfusionMatrix", "FoldEval", "HarmonizationMode", "MetricsReport", "PcaResult", "VOTINGS",
    "VideoPrediction", "confusion_from_votes", "cross_evaluate", "evaluate_fold", "harmonize",
    "harmonized_fold", "model_scorer", "pca2", "score_videos", "uar", "video_clips", "vote", "vote_mv",
    "vote_pbv", "war",
]

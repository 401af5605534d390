"""Gender-controlled decoding: external LM fusion with internal LM subtraction."""

from importlib.resources import files

from .core import (BOS, EOS, LOG_FLOOR, UNK, DataError, FusedecError, FusionWeights, NumericError, Vocabulary,
                   log_softmax, log_sum_exp)
from .evaluation import AnnotatedSentence, AnnotatedTerm, bleu_corpus, evaluate, harmonic_mean, score_gender
from .fusion import (DecodeResult, FusionScorer, IlmContext, beam_search, compute_ilm_context, exhaustive_decode,
                     fused_step_scores, grid_beam_search, ilm_logprob_dist)
from .ngram import NGramLM, train_ngram
from .seq2seq import ToySeq2Seq, TrainConfig, fine_tune, numerical_grad_check, train

__version__ = "0.1.0"


def data_path(name: str):
    """Path of a file shipped in ``fusedec/data``."""
    return files(__name__) / "data" / name


__all__ = [
    "BOS", "EOS", "UNK", "LOG_FLOOR", "FusedecError", "DataError", "NumericError", "FusionWeights", "Vocabulary",
    "log_softmax", "log_sum_exp", "AnnotatedSentence", "AnnotatedTerm", "bleu_corpus", "evaluate",
    "harmonic_mean", "score_gender", "DecodeResult", "FusionScorer", "IlmContext", "beam_search",
    "compute_ilm_context", "exhaustive_decode", "fused_step_scores", "grid_beam_search", "ilm_logprob_dist",
    "NGramLM", "train_ngram", "ToySeq2Seq", "TrainConfig", "fine_tune", "numerical_grad_check", "train",
    "data_path",
]

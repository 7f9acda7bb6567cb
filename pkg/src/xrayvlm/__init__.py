"""Vision-language chest X-ray report generation at desk scale.

ViT/SWIN image encoders, GPT-2/BART-style cross-attention decoders, an AdamW
training loop and ROUGE/BLEU/BERTScore evaluation.
"""

from .corpus import (CorpusManifest, StudyRecord, load_manifest, report_length_stats, strip_stopwords,
                     validate_manifest, word_frequencies)
from .decoders import DecoderConfig, GenerationConfig, causal_mask, generate
from .encoders import EncoderConfig, window_partition, window_reverse
from .metrics import bertscore, bleu, evaluate_corpus, lcs_length, rouge_l, rouge_n
from .model import VisionLanguageModel, build_model
from .tokenizer import Vocab, build_vocab, decode, encode
from .training import RunConfig, adamw_step, fit, xent_loss

__version__ = "0.1.0"

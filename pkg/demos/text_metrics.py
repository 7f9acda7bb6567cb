"""
Scoring generated reports
=========================

ROUGE-1..4, ROUGE-L, corpus BLEU and BERTScore on a toy corpus. The hash
embedder stands in for a contextual model; any tokens -> vectors callable can
be plugged in through FunctionEmbedder.
"""

from xrayvlm.metrics import HashEmbedder, evaluate_corpus, metric_report_text, rouge_l, rouge_n, tokenize

cand, ref = tokenize("No acute disease."), tokenize("No acute cardiopulmonary disease.")
print(rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rouge_l(cand, ref), sep="\n")

predictions = {"a": "no acute disease", "b": "heart size is normal", "c": "lungs clear"}
references = {"a": "no acute cardiopulmonary disease", "b": "the heart size is normal", "c": "the lungs are clear"}
row = evaluate_corpus(predictions, references, HashEmbedder(dim=64))
print(metric_report_text({"toy model": row}))

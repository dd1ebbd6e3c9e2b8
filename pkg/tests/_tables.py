"""Result rows used as experiment-record fixtures."""

from tinyst.sweep import ExperimentRecord

ABLATION_ROWS = [
    # lr, ls, batch, sp, sa, warmup, patience, beam, bleu
    (1e-5, 0.1, 10, False, False, 100, 5, 5, 33.1),
    (1e-5, 0.1, 10, False, False, 100, 5, 10, 33.8),
    (1e-5, 0.1, 32, False, False, 100, 5, 10, 34.0),
    (1e-5, 0.1, 32, False, True, 250, 5, 10, 35.3),
    (1e-5, 0.1, 32, False, True, 250, 10, 10, 36.4),
    (1e-5, 0.1, 32, False, True, 250, 20, 10, 35.6),
]

AUGMENT_ROWS = [(False, False, 31.8), (False, True, 33.7), (True, False, 32.7), (True, True, 32.4)]

SMOOTHING_ROWS = [(0.0, 30.9, 55.3), (0.1, 33.8, 56.9), (0.2, 31.8, 56.6)]

LR_BATCH_ROWS = [(1e-5, 5, 30.5, 54.5), (1e-5, 10, 33.8, 56.9), (1e-5, 32, 35.1, 58.2),
                 (1e-6, 5, 18.2, 48.4), (1e-6, 10, 20.1, 49.1), (1e-6, 32, 26.7, 51.2)]


def ablation_records():
    keys = ("lr", "ls", "batch", "sp", "sa", "warmup", "patience", "beam")
    return [ExperimentRecord.from_config(dict(zip(keys, row[:8])), dev_bleu=row[8]) for row in ABLATION_ROWS]


def augment_records():
    return [ExperimentRecord.from_config({"sp": sp, "sa": sa, "batch": 10}, dev_bleu=b) for sp, sa, b in AUGMENT_ROWS]


AUGMENT_GOLDEN = """\
| SP | SA | BLEU |
|:---:|:---:|---:|
| False | False | 31.8 |
| False | True | 33.7 |
| True | False | 32.7 |
| True | True | 32.4 |
"""

FULL_GOLDEN = """\
| LR | LS | Batch size | SP | SA | Warm up steps | Patience | Beam size | BLEU |
|---|---|---:|:---:|:---:|---:|---:|---:|---:|
| 1e-5 | 0.1 | 10 | False | False | 100 | 5 | 5 | 33.1 |
| 1e-5 | 0.1 | 10 | False | False | 100 | 5 | 10 | 33.8 |
| 1e-5 | 0.1 | 32 | False | False | 100 | 5 | 10 | 34.0 |
| 1e-5 | 0.1 | 32 | False | True | 250 | 5 | 10 | 35.3 |
| 1e-5 | 0.1 | 32 | False | True | 250 | 10 | 10 | 36.4 |
| 1e-5 | 0.1 | 32 | False | True | 250 | 20 | 10 | 35.6 |
"""

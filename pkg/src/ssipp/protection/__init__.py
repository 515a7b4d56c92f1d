"""TMR and Hamming-ECC protection of parameter storage."""
from .hamming import (HammingCodeword, hamming_decode, hamming_encode, required_parity_bits,
                      bits_to_word, word_to_bits)
from .overhead import (LogicCostModel, OverheadReport, ecc_vs_tmr_logic, ecc_vs_tmr_storage,
                       logic_overhead, storage_overhead)
from .policy import PolicyError, ProtectionPolicy, Selector, load_policy
from .simulate import ProtectedStorage, apply_and_inject, protected_scan
from .tmr import tmr_vote
from .tradeoff import NormalizationError, TradeoffPoint, residual_ssipp, tradeoff_curve, write_tradeoff_csv

"""Shared literals and calibration defaults.

Every module reads the serialization constants from here so that prompts,
parsers and filters agree on the exact surface forms.
"""

# Separator line placed between the question block and the reasoning chain
# when the two are concatenated into a single prompt.
SEPARATOR = "<sep>"

# Canonical answer-sentence prefix; predictions are normalized to
# "The answer is <X>." and extraction keys on this marker.
ANSWER_MARKER = "The answer is"

# Ordinals used by the last-letter chain template. The fourth entry is
# deliberately spelled "forth": the template reproduces that surface form.
ORDINALS = ("first", "second", "third", "forth", "fifth")

MAX_GROUP_LEN = 5

# Generation length cap passed to backends when the caller does not choose one.
DEFAULT_MAX_NEW_TOKENS = 256

# Calibration knobs for the simulated last-letter backends. Tuned so that
# with these values the vanilla strategy scores ~0.64 and the two-level
# pipeline ~0.77 on a generated test split; they are calibration defaults,
# not measurements of any real model.
CALIBRATED_Q_ACC = 0.64
CALIBRATED_P_WORD_SUB = 0.03
CALIBRATED_P_LETTER_ERR = 0.03
CALIBRATED_P_OMIT = 0.03

# Default feature-space and decision settings for the linear verifier.
VERIFIER_HASH_BITS = 18
VERIFIER_NGRAM_RANGE = (1, 2)
VERIFIER_THRESHOLD = 0.5

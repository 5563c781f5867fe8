"""Three-factor (password, smart card, biometric) authentication testbed.

Two schemes live side by side: a legacy ECC-based one (:mod:`.li_scheme`)
together with the attacks that break it (:mod:`.li_attacks`), and an
AES/hash scheme with recovery phases (:mod:`.proposed_scheme`).  Both run
over a deterministic message fabric (:mod:`.fabric`) and are exercised by
scenario suites (:mod:`.channel_sim`) from the ``threefactor`` CLI.
"""

__version__ = "0.1.0"

"""
Detection hazards and population dynamics over irregular gaps
=============================================================

Three small components make up the model: a hazard half-normal encounter
rate turned into per-occasion detection probabilities, a three-state
availability process (before / during / after) with per-year entry and
survival rates, and the per-primary density surfaces derived from both.
"""

import numpy as np

from openscr import (
    DensitySurface,
    DetectionField,
    StateModel,
    derived_density,
    encounter_rate,
    entry_probs,
    individual_loglik,
    occasion_detection,
    state_transitions,
)

# ---------------------------------------------------------------------------
# Encounter rate falls off with distance from the activity center.

for r in (0.0, 1000.0, 3000.0, 6000.0):
    e = encounter_rate(0.8, 2000.0, r)
    print(f"distance {r:6.0f} m -> encounter rate {e:.4f} per survey pass")

# A mesh point surveyed by two traps: the chance of being seen at all, and
# how a sighting splits between the traps (competing hazards).
det = DetectionField(
    lam=np.array([[0.8], [0.8]]),
    sigma=np.array([[2000.0], [2000.0]]),
    effort=np.array([[[3]], [[1]]]),  # trap 0 was passed 3 times
    distances=np.array([[1200.0], [1800.0]]),
)
p, alloc = occasion_detection(0, 0, 0, det)
print(f"\ndetection probability: {p:.3f}; allocation across traps: {np.round(alloc, 3)}")

# ---------------------------------------------------------------------------
# Entry over irregular gaps: a constant per-year entry rate spreads arrivals
# proportionally to gap length, and a long gap soaks up more of the entries.

delta = np.array([0.4, 0.4, 0.2, 4.9])  # years between primary mid-points
gamma = np.full(4, 0.3)
beta = entry_probs(gamma, delta)
print("\ngap lengths:", delta)
print("entry probabilities per primary:", np.round(beta, 3), "sum", beta.sum())

state = StateModel(gamma=gamma, phi=np.full(4, 0.9), delta=delta)
init, trans = state_transitions(state)
print("initial (before, during, after):", np.round(init, 3))
print("transition over the long final gap:")
print(np.round(trans[-1], 3))

# The probability of never seeing an individual combines entry, survival,
# and detection; here with one trap and 50% detection per primary.
det5 = DetectionField(
    lam=np.full((1, 5), np.log(2.0)),
    sigma=np.full((1, 5), 1e6),
    effort=np.ones((1, 5, 1), dtype=np.int64),
    distances=np.zeros((1, 1)),
)
never = np.full((5, 1), -1, dtype=np.int64)
pr = individual_loglik(never, 0, det5, state)
print(f"\nPr(an ever-present individual is never detected) = {pr:.4f}")

# ---------------------------------------------------------------------------
# Density through time: one shared spatial pattern whose magnitude follows
# the entry/survival process; with certain survival the final primary holds
# the whole superpopulation.

density = DensitySurface(D=np.array([2.0, 1.0, 0.5]), areas=np.full(3, 4.0))
Dk, Nk = derived_density(state, density, marked_fraction=0.8)
print("\nper-primary density at the first mesh point:", np.round(Dk[:, 0], 3))
print("whole-population abundance by primary:", np.round(Nk, 1))
print("superpopulation (marked):", density.expected_total)

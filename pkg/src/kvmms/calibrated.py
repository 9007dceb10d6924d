"""Empirical constants from scripts/calibrate.py (seed 7, 500 samples per grid).

Checks compare sampled ratios against SAFETY times these values.
"""
SAFETY = 1.5

# max |grad y1 - grad y0| / |C1 - C0| keyed by (grid nodes per axis, p_tilde)
RIGIDITY = {
    (17, 1.5): 0.671322231858912,
    (33, 1.5): 0.6707096187638697,
    (17, 2.0): 0.661370373685717,
    (33, 2.0): 0.6609138498656614,
    (17, 3.0): 0.6480287298141583,
    (33, 3.0): 0.6481878724375694,
}

# max |grad u| / |grad u^T grad y + grad y^T grad u| at the datum, same keys
KORN = {
    (17, 1.5): 0.6464328154533372,
    (33, 1.5): 0.6460997873693837,
    (17, 2.0): 0.6483059710070549,
    (33, 2.0): 0.6480745142029258,
    (17, 3.0): 0.6542213745043717,
    (33, 3.0): 0.6544421495456202,
}

# (min, max) of D(y0, y1) / |grad y1 - grad y0|, same keys
NORM_EQUIVALENCE = {
    (17, 1.5): (11.34202164760628, 16.25357151629227),
    (33, 1.5): (11.372697473481214, 16.260143932894152),
    (17, 2.0): (11.519808670700922, 16.679562986631137),
    (33, 2.0): (11.543882572464646, 16.68412799954373),
    (17, 3.0): (11.443331843688267, 17.49391519515887),
    (33, 3.0): (11.443486141673793, 17.50418969493206),
}

# half the smallest sampled convexity modulus near the datum, per preset
LAMBDA_HAT = {
    'ref_small_strain': 3.4331535812605716,
    'decay_p1_5': 3.4331535812605716,
    'decay_p2': 3.4331535812605716,
    'decay_p3': 3.4331535812605716,
}

# largest datum scale where multi-start minimizers agree and sampled convexity holds
DELTA_PRIME = 0.12653257793856082

# (c, C) in W >= c (|F|^2 + det F^-q) - C on the sampled singular-value box, reference material
GROWTH_FLOOR = (0.25, 0.7705226144652916)

# sharp constant of the power increment inequality per exponent
POWER_INEQUALITY = {
    1.5: 0.41421356237309503,
    2.0: 1.0000000000000004,
    3.0: 3.0000000000000013,
}

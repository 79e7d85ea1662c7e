"""Reference models shared by the experiment scripts."""

from mrptick import GammaLaw, MrpModel

# Gamma (shape, scale) fitted to trend-following (+) and mean-reverting (-) sojourns, in ms
PLUS = (0.276225, 2397.219)
MINUS = (0.07132677, 1561.593)
ALPHA = -0.875


def reference_model():
    return MrpModel.symmetric(ALPHA, GammaLaw(*PLUS), GammaLaw(*MINUS))


def reference_mixture_model():
    """Same chain with the sign-averaged sojourn law for every transition."""
    mix = reference_model().mixture_law
    return MrpModel.symmetric(ALPHA, mix, mix)

"""aedbench: robustness benchmark for audio event classifiers.

Measures how desk-scale classifier families degrade under temporal
occlusion, Gaussian noise, and white-box adversarial perturbation of their
logMel inputs, and reports mAP / AUC / d-prime per condition.
"""

__version__ = "0.1.0"

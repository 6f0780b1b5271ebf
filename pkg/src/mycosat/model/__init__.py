"""Tree-ensemble regressors: boosted trees and random forests."""
from .binning import Binner, fit_bins
from .ensemble import CapabilityError, TreeEnsemble
from .forest import RfConfig, rf_fit, rf_predict
from .gbdt import GbdtConfig, gbdt_fit, gbdt_predict

__all__ = ["Binner", "fit_bins", "CapabilityError", "TreeEnsemble", "RfConfig", "rf_fit",
           "rf_predict", "GbdtConfig", "gbdt_fit", "gbdt_predict", "importance"]


def importance(model: TreeEnsemble, mode: str = "split_count"):
    return model.importance(mode)

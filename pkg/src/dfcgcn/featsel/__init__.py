"""Feature selection: t-test + FDR for scalar features, forest and SVM-RFE for FC."""
from .forest import DecisionTree, RandomForest, rf_importance
from .matrix import FeatureMatrix, assemble_features
from .report import SelectionReport, top_k_indices
from .stats import bh_fdr, ttest_fdr_select, welch_ttest
from .svm import rfe_svm, standardize, train_linear_svm

__all__ = [
    "DecisionTree", "RandomForest", "rf_importance",
    "FeatureMatrix", "assemble_features",
    "SelectionReport", "top_k_indices",
    "bh_fdr", "ttest_fdr_select", "welch_ttest",
    "rfe_svm", "standardize", "train_linear_svm",
]

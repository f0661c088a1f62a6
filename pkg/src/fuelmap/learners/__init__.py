from .models import (FAMILIES, ConstantModel, DecisionTreeModel, ForestModel,
                     GradientBoostedTrees, KNNModel, LearnerSpec, MLPModel, make_model,
                     model_from_state, rowwise_matmul)
from .tree import Tree, build_tree

__all__ = [
    "FAMILIES", "ConstantModel", "DecisionTreeModel", "ForestModel", "GradientBoostedTrees",
    "KNNModel", "LearnerSpec", "MLPModel", "make_model", "model_from_state", "rowwise_matmul",
    "Tree", "build_tree",
]

"""Dual-tower graph-convolutional recommendation on heterogeneous graphs."""

from .errors import (CategoryExhaustedError, CheckpointError, ConfigError,
                     EvalError, GraphFormatError, IntentGCError,
                     NonFiniteError, SchemaError, ShapeError)
from .graph import (FeatureField, FeatureSchema, FeatureStore, IdDictionary,
                    TypedGraph, load_dictionary, load_features, load_graph,
                    load_schema, save_dictionary, save_schema, write_features,
                    write_graph)
from .intentnet import (FlopCount, aggregate, conv_bitwise, conv_vectorwise,
                        count_flops, tower_forward, tower_forward_batch)
from .numcore import Tape, Var, grad_check
from .params import (BITWISE, BitwiseLayerParams, ConvLayerParams,
                     ModelParams, TowerParams, VECTORWISE, init_params,
                     load_checkpoint, named_arrays, save_checkpoint)
from .translate import (Neighborhood, PairWeights, TranslatedGraph,
                        build_neighborhoods, load_translated, save_translated,
                        second_order_proximity, translate)

__version__ = "0.1.0"

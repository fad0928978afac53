"""Continual test-time adaptation of graph classifiers with memory replay."""

from .adaptation import AdaptConfig, adapt_domain, amr_loss, im_loss
from .backbone import (ForwardOutput, ModelParams, ParamGrads, ema_update,
                       gcn_forward, init_params, loss_gradient, sgd_step,
                       supervised_loss)
from .errors import ContractError, LoadError, MetricError, NumericError
from .evaluation import (PerformanceMatrix, average_forgetting,
                         average_performance, domain_score)
from .generator import (GenConfig, GeneratorParams, LatentSelection,
                        edge_weights, encode_distributions, gen_loss,
                        generate_memory, generator_objective, grad_distance,
                        init_generator, memory_size, mgl_loss, reg_loss,
                        sample_edges, sample_latents, topk_select,
                        train_generator)
from .graphs import (DriftSpec, Graph, GraphSequence, Violation,
                     dense_adjacency, normalized_adjacency, synth_drift_sequence,
                     validate_graph)
from .memory import MemoryGraph, MemoryPool
from .trainer import RunState, pretrain, run_continual

__version__ = "0.1.0"

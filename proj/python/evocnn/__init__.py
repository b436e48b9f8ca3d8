"""Genetic search over CNN topologies, with wall-time regularised fitness and
generation-indexed partial training. Thin wrapper over the C++ core."""

from ._core import (
    cost_estimate,
    crossover,
    epochs_for_generation,
    lr_for_epoch,
    mutate,
    output_shape,
    random_genome,
    regularised_fitness,
    render_architecture,
    run_experiment,
    surrogate_a_max,
    surrogate_accuracy,
)

__all__ = [
    "cost_estimate",
    "crossover",
    "epochs_for_generation",
    "lr_for_epoch",
    "mutate",
    "output_shape",
    "random_genome",
    "regularised_fitness",
    "render_architecture",
    "run_experiment",
    "surrogate_a_max",
    "surrogate_accuracy",
]

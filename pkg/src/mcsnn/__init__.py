"""mcsnn: multi-compartment spiking neural networks for physiological
time-series classification.

Library layout:
    data          ingest pipeline, synthetic data, dataset container
    encoding      Bernoulli rate encoding into spike tensors
    neurons       LIF / current-based LIF / multi-compartment leaky dynamics
    slstm         spiking LSTM cell family
    network       trainable layer graph and time-unrolled forward/backward
    training      losses, Adam, schedules, BPTT training loop, checkpoints
    quantization  fixed-point formats, shift-based decay, QAT, bit sweeps
    grammar       BNF-style grammar parsing and sampling
    nas           two-level grammar-guided neuro-evolution
    energy        spike-ratio energy model and efficiency reports
    processor     event-driven spike processor simulator (AER in/out)
    plots         figure rendering for the report command
    cli           batch command-line interface
"""

__version__ = "0.1.0"

"""Desk-scale lab for reward-guided fine-tuning of toy motion diffusion
models: a tape-based autodiff core with stop-gradient and node-count
memory accounting, a synthetic multi-representation motion corpus, a
unified multi-head reward model with self-refinement, and two
fine-tuning engines (full-trajectory versus step-wise)."""

__version__ = "0.1.0"

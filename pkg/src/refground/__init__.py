"""Synthetic tabletop scenes, referring-expression queries, and a fully
decoupled modular grounding model (word tagger + entity/attribute/spatial/
location matching) trained from scratch with per-module supervision."""

__version__ = "0.1.0"

"""Generate, filter, judge, and human-review persona-grounded open-domain
dialogue corpora in arbitrary target languages via instruction-tuned LLMs."""

__version__ = "0.1.0"

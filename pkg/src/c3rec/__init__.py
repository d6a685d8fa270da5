"""Group recommendation with a transformer encoder, margin ranking loss,
and member-masking contrastive learning."""

__version__ = "0.1.0"

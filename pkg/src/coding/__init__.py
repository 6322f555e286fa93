"""Source models, typical-set ranking, level-0 codecs and rank dictionaries."""

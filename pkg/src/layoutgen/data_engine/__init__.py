"""Layer database, retrieval-driven template augmentation and synthetic datasets."""

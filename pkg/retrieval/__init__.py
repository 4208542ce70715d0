"""
erank - Retrieval Package
=========================
Entity documents, the fielded index, text-match and entity features, TransE
embeddings, learning to rank and evaluation
"""

"""Runtime knobs, kept in one place.

``single_threaded`` exists for deterministic test runs; batch search code
consults it before fanning work out. The default is deterministic.
"""

# query batches at or above this size use the matrix-multiplication
# decomposition for L2/IP flat search
blas_threshold: int = 20

# force sequential execution of batch operations (deterministic ordering)
single_threaded: bool = True

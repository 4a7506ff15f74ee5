"""perigen: symmetry-exact generative modeling of periodic crystal structures.

Submodules
----------
crystal     data model and the four exact symmetry transformations
graph       periodic multi-graph (cutoff edge set over lattice images)
autodiff    minimal reverse-mode tape on numpy float64 arrays
backbone    invariant message-passing network over edge distances
diffusion   denoising score matching over edge distances
sampler     annealed Langevin coordinate generation
vae         atom-type-set / lattice-parameter VAE and latent optimization
evaluation  validity, distribution, coverage, and reconstruction metrics
data_io     dataset format, synthetic corpus, CIF export
config      run configuration (flat key = value files)
cli         command-line pipeline
"""

__version__ = "0.1.0"

"""Low-entropy mean curvature flow with surgery for hypersurfaces of revolution."""
__version__ = "0.1.0"

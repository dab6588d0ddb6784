"""physid - Parameter identification of simple physical systems from video-like trajectories"""
__version__ = "0.1.0"

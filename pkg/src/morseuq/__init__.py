"""Structure-wise uncertainty for curvilinear segmentation likelihood maps."""

__version__ = "0.1.0"

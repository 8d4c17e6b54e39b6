from .cnn import CellEmbeddingSet, CnnConfig, embed_image, init_cnn_params, prepare_rgbd
from .grid import GridHierarchy, GridLevel, build_grid_hierarchy, locate_cell

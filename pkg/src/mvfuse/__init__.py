"""Multi-view late fusion for LiDAR semantic segmentation.

Two per-point score matrices from complementary views are checked for
agreement; confident points keep a geometric-mean ensemble while
disagreeing points are re-scored by a small trainable head that looks at
the point's neighbourhood. The package also ships the projection geometry
between clouds and view grids, synthetic scene and scorer generators for
desk-scale experiments, and IoU evaluation tools.
"""

from .assertion import (UncertaintyMask, cosine_similarity, sample_training_batch,
                        similarity_histogram, similarity_rows, uncertainty_mask)
from .dataio import (AugmentParams, AugmentRanges, BoxCluster, GroundAnnulus,
                     PointCloud, RemapTable, SceneConfig, ScorerProfile,
                     VerticalPole, augment_cloud, generate_synthetic_scene,
                     ignore_id, read_labels, read_point_cloud, read_predictions,
                     read_scores, synthetic_scorer, write_labels,
                     write_point_cloud, write_predictions, write_scores)
from .errors import ConfigError, DataError, DivergenceError
from .fusion import (SOURCE_ENSEMBLE, SOURCE_HEAD, FusionResult,
                     combine_arithmetic, combine_geometric, combine_max,
                     fuse_predictions)
from .metrics import (ConfusionMatrix, StratumResult, accumulate, class_iou,
                      confusion_matrix, fw_iou, miou, stratified_confusions,
                      stratified_miou)
from .neighborhood import (CoordStats, KDTree, assemble_point_features,
                           assemble_set_features, batch_point_features,
                           batch_set_features, brute_force_knn,
                           compute_coord_stats, knn_query, knn_table)
from .pointhead import (HeadTrainConfig, PointHeadModel, Scan, init_point_head,
                        load_point_head, point_head_forward, predict_uncertain,
                        save_point_head, sqrt_inverse_class_weights,
                        train_point_head)
from .projection import (BEVConfig, ProjectionIndex, RVConfig,
                         build_range_image, gather_cell_scores_to_points,
                         project_bev, project_rv, read_range_image,
                         scatter_scores_to_cells, write_range_image)

__version__ = "0.1.0"

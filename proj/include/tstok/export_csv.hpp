#pragma once

#include <string>

#include "tstok/embed_geometry.hpp"

namespace tstok {

// Plot-ready projection of a container's TS block: one row per token with
// its grid value and the 2-D/3-D PCA coordinates from the deterministic
// fit. Columns: index,value,pc1_2d,pc2_2d,pc1_3d,pc2_3d,pc3_3d.
void export_pca(const EmbeddingMatrix& emb, const std::string& csv_path);

}  // namespace tstok

// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <string>

#include "dg3d/meshtex.hpp"

namespace dg3d::meshtex {

RefineResult progressive_refine(const Mesh& mesh, const TextureAtlas& atlas0, const RefineSchedule& schedule,
                                priors::TranslationBackend& backend, const RefineOptions& options,
                                const std::function<void(const RefineStage&)>& observer) {
    RefineResult result;
    TextureAtlas atlas = atlas0;
    std::vector<BlendView> refined_views;
    for (std::size_t i = 0; i < schedule.views.size(); ++i) {
        const RefineView& view = schedule.views[i];
        const Raster raster = rasterize_geometry(mesh, view.camera, atlas.resolution);
        RefineStage stage;
        stage.index = i;
        stage.view = view;
        stage.render = shade(raster, atlas.texels);
        stage.depth = raster.depth_map();
        stage.edges = edge_map(stage.render, options.edge_low, options.edge_high);

        std::vector<double> region(raster.face.size(), 0.0);
        if (view.mode == priors::TranslateMode::img2img) {
            for (std::size_t p = 0; p < region.size(); ++p) region[p] = raster.hit(p) ? 1.0 : 0.0;
        } else {
            stage.mask = dilate(unrefined_mask(raster, atlas), raster.height, raster.width, schedule.dilation_radius);
            region = *stage.mask;
        }

        priors::TranslationRequest req;
        req.image = stage.render;
        req.edge_control = stage.edges;
        req.depth_control = stage.depth;
        req.mask = stage.mask;
        req.strength = view.strength;
        req.prompt = options.prompt;
        req.seed = options.seed + i;
        try {
            stage.refined = priors::translate(backend, req);
        } catch (const priors::BackendError&) {
            if (options.dump_dir) {
                std::filesystem::create_directories(*options.dump_dir);
                write_ppm(*options.dump_dir / ("partial_atlas_view" + std::to_string(i) + ".ppm"), atlas.image());
                write_ppm(*options.dump_dir / ("failed_request_view" + std::to_string(i) + ".ppm"), stage.render);
            }
            throw;
        }
        project_refined(atlas, raster, stage.refined, region);
        stage.atlas = &atlas;
        if (observer) observer(stage);
        result.stages.push_back(atlas);
        result.refined_images.push_back(stage.refined);
        refined_views.push_back({view.camera, stage.refined});
    }
    result.final_atlas =
        adaptive_blend(mesh, refined_views, atlas.resolution, options.blend_iters, options.tv_weight);
    result.final_atlas.refined = atlas.refined;
    return result;
}

}  // namespace dg3d::meshtex

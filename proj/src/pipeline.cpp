#include "ssc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssc/errors.hpp"

namespace ssc {

std::string to_string(QueryMode mode) {
  switch (mode) {
    case QueryMode::learnable: return "learnable";
    case QueryMode::detached: return "detached";
    case QueryMode::none: return "none";
  }
  return "?";
}

QueryMode parse_query_mode(const std::string& text) {
  if (text == "learnable") return QueryMode::learnable;
  if (text == "detached") return QueryMode::detached;
  if (text == "none") return QueryMode::none;
  throw ConfigError("unknown query mode '" + text + "' (learnable | detached | none)");
}

void PipelineConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embed_dim must be >= 1");
  if (heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim must be divisible by heads");
  }
  if (decoder_layers < 1) throw ConfigError("decoder_layers must be >= 1");
  if (sampling_points < 1) throw ConfigError("sampling_points must be >= 1");
  if (feature_levels < 1) throw ConfigError("feature_levels must be >= 1");
  if (ffn_hidden < 1) throw ConfigError("ffn_hidden must be >= 1");
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in [2, 255]");
  if (upsample_factor < 1) throw ConfigError("upsample_factor must be >= 1");
  if (query_mode != QueryMode::none && num_queries == 0) {
    throw ConfigError("num_queries must be >= 1 unless query_mode = none");
  }
  grid.validate();
}

PipelineConfig PipelineConfig::full_scale() {
  PipelineConfig c;
  c.grid = VoxelGridSpec::semantic_kitti();
  c.grid.voxel_size *= 2.0;
  for (auto& d : c.grid.dims) d /= 2;
  return c;
}

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.num_queries = 8;
  c.embed_dim = 32;
  c.decoder_layers = 3;
  c.encoder_layers = 2;
  c.heads = 4;
  c.sampling_points = 4;
  c.feature_levels = 2;
  c.ffn_hidden = 64;
  c.num_classes = 20;
  c.upsample_factor = 2;
  c.grid = VoxelGridSpec::desk();
  return c;
}

Tensor conv3d_same(const Tensor& vol, const Conv3d& conv) {
  if (vol.rank() != 4) throw ShapeError("conv3d_same: volume must be [X, Y, Z, C]");
  if (conv.weight.rank() != 3 || conv.weight.dim(0) != 27 || conv.weight.dim(2) != vol.dim(3) ||
      conv.bias.size() != conv.weight.dim(1)) {
    throw ShapeError("conv3d_same: weight must be [27, out, in] with matching bias");
  }
  const std::size_t nx = vol.dim(0), ny = vol.dim(1), nz = vol.dim(2);
  const std::size_t cin = vol.dim(3), cout = conv.weight.dim(1);
  const auto d = static_cast<std::ptrdiff_t>(conv.dilation);
  Tensor out({nx, ny, nz, cout});

  const auto total = static_cast<std::ptrdiff_t>(nx);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t x = 0; x < total; ++x) {
    for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(ny); ++y) {
      for (std::ptrdiff_t z = 0; z < static_cast<std::ptrdiff_t>(nz); ++z) {
        auto o = out.lane((static_cast<std::size_t>(x) * ny + static_cast<std::size_t>(y)) * nz +
                          static_cast<std::size_t>(z));
        std::copy(conv.bias.begin(), conv.bias.end(), o.begin());
        std::size_t tap = 0;
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
            for (std::ptrdiff_t dz = -1; dz <= 1; ++dz, ++tap) {
              const std::ptrdiff_t sx = x + dx * d, sy = y + dy * d, sz = z + dz * d;
              if (sx < 0 || sy < 0 || sz < 0 || sx >= static_cast<std::ptrdiff_t>(nx) ||
                  sy >= static_cast<std::ptrdiff_t>(ny) || sz >= static_cast<std::ptrdiff_t>(nz)) {
                continue;
              }
              const auto in = vol.lane((static_cast<std::size_t>(sx) * ny +
                                        static_cast<std::size_t>(sy)) * nz +
                                       static_cast<std::size_t>(sz));
              const double* w = conv.weight.data() + tap * cout * cin;
              for (std::size_t co = 0; co < cout; ++co) {
                const double* row = w + co * cin;
                double acc = 0.0;
                for (std::size_t ci = 0; ci < cin; ++ci) acc += row[ci] * in[ci];
                o[co] += acc;
              }
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

Conv3d make_conv(std::size_t channels, std::size_t dilation, Rng& rng) {
  Conv3d c;
  c.dilation = dilation;
  c.weight = Tensor({27, channels, channels});
  const double a = std::sqrt(6.0 / static_cast<double>(28 * channels));
  for (double& w : c.weight.values()) w = rng.uniform(-a, a);
  c.bias.assign(channels, 0.0);
  return c;
}

DeformableBlockParams make_deformable_block(const PipelineConfig& cfg, std::size_t levels,
                                            std::size_t coord_dim, Rng& rng) {
  return DeformableBlockParams{
      make_deformable_params(cfg.embed_dim, cfg.heads, levels, cfg.sampling_points, coord_dim, rng),
      make_residual_params(cfg.embed_dim, cfg.ffn_hidden, rng)};
}

AttnBlockParams make_attn_block(const PipelineConfig& cfg, Rng& rng) {
  return AttnBlockParams{make_attn_params(cfg.embed_dim, cfg.heads, rng),
                         make_residual_params(cfg.embed_dim, cfg.ffn_hidden, rng)};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::size_t> fov_indices(const VoxelMask& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (mask.bits[i]) idx.push_back(i);
  }
  return idx;
}

Tensor gather_rows(const Tensor& volume, const std::vector<std::size_t>& rows) {
  const std::size_t c = volume.lane_width();
  Tensor out({rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(volume.lane(rows[r]).begin(), c, out.lane(r).begin());
  }
  return out;
}

void scatter_rows(Tensor& volume, const std::vector<std::size_t>& rows, const Tensor& values) {
  const std::size_t c = volume.lane_width();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(values.lane(r).begin(), c, volume.lane(rows[r]).begin());
  }
}

}  // namespace

ModelParams init_model(const PipelineConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t c = config.embed_dim;
  ModelParams p;

  p.scene_embedding = Tensor({config.grid.dims[0], config.grid.dims[1], config.grid.dims[2], c});
  for (double& v : p.scene_embedding.values()) v = rng.uniform(-0.5, 0.5);

  if (config.num_queries > 0) {
    p.queries.embeddings = Tensor({config.num_queries, c});
    for (double& v : p.queries.embeddings.values()) v = rng.uniform(-0.5, 0.5);
    p.queries.ref_logits = Tensor({config.num_queries, 2});
    for (double& v : p.queries.ref_logits.values()) v = rng.uniform(-2.0, 2.0);
  }

  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    p.encoder.push_back(make_deformable_block(config, config.feature_levels, 2, rng));
  }
  p.proposal = make_deformable_block(config, config.feature_levels, 2, rng);
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    DecoderLayerParams layer;
    layer.instance_image = make_deformable_block(config, config.feature_levels, 2, rng);
    layer.scene_instance = make_attn_block(config, rng);
    layer.scene_self = make_deformable_block(config, 1, 3, rng);
    layer.instance_scene = make_deformable_block(config, 1, 3, rng);
    layer.instance_self = make_attn_block(config, rng);
    p.decoder.push_back(std::move(layer));
  }
  for (std::size_t dil = 1; dil <= 3; ++dil) p.head.aspp.push_back(make_conv(c, dil, rng));
  p.head.mix = make_linear(c, c, rng);
  p.head.classifier = make_linear(config.num_classes, c, rng);
  return p;
}

Tensor stratified_reference_points(std::size_t n) {
  if (n == 0) return Tensor();
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  Tensor refs({n, 2});
  for (std::size_t q = 0; q < n; ++q) {
    refs(q, 0) = (static_cast<double>(q % cols) + 0.5) / static_cast<double>(cols);
    refs(q, 1) = (static_cast<double>(q / cols) + 0.5) / static_cast<double>(rows);
  }
  return refs;
}

InstanceQueries make_instance_queries(const PipelineConfig& config,
                                      const InstanceQueryParams& params) {
  InstanceQueries q;
  q.mode = config.query_mode;
  const std::size_t n = config.active_queries();
  if (n == 0) return q;
  if (params.embeddings.rank() != 2 || params.embeddings.dim(0) != n ||
      params.embeddings.dim(1) != config.embed_dim) {
    throw ConfigError("instance query embeddings do not match num_queries x embed_dim");
  }
  q.embeddings = params.embeddings;
  if (config.query_mode == QueryMode::detached) {
    q.ref_points_2d = stratified_reference_points(n);
  } else {
    if (params.ref_logits.rank() != 2 || params.ref_logits.dim(0) != n) {
      throw ConfigError("instance reference parameters do not match num_queries");
    }
    q.ref_points_2d = Tensor({n, 2});
    for (std::size_t i = 0; i < q.ref_points_2d.size(); ++i) {
      q.ref_points_2d[i] = sigmoid(params.ref_logits[i]);
    }
  }
  return q;
}

SceneVolume init_scene(const PipelineConfig& config, const ModelParams& params,
                       const CameraModel& cam, const DepthMap& depth) {
  config.validate();
  cam.validate();
  if (depth.values.rank() != 2 || depth.width() != cam.image_size.width ||
      depth.height() != cam.image_size.height) {
    throw ConfigError("init_scene: depth map size does not match the camera image size");
  }
  const auto& e = params.scene_embedding;
  if (e.rank() != 4 || e.dim(0) != config.grid.dims[0] || e.dim(1) != config.grid.dims[1] ||
      e.dim(2) != config.grid.dims[2] || e.dim(3) != config.embed_dim) {
    throw ConfigError("init_scene: scene embedding does not match grid dims x embed_dim");
  }
  SceneVolume s;
  s.embeddings = e;
  s.grid = config.grid;
  s.proposal = propose_voxels(cam, config.grid, depth);
  s.fov_mask = compute_fov_mask(cam, config.grid);
  return s;
}

MultiScaleFeatures encode_features(const MultiScaleFeatures& features,
                                   const std::vector<DeformableBlockParams>& encoder) {
  MultiScaleFeatures current = features;
  if (encoder.empty()) return current;
  std::size_t tokens = 0;
  for (const auto& f : current) {
    if (f.rank() != 3) throw ShapeError("encode_features: feature maps must be [H, W, C]");
    tokens += f.dim(0) * f.dim(1);
  }
  const std::size_t c = current.front().dim(2);
  Tensor refs({tokens, 2});
  {
    std::size_t t = 0;
    for (const auto& f : current) {
      const std::size_t h = f.dim(0), w = f.dim(1);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j, ++t) {
          refs(t, 0) = w > 1 ? static_cast<double>(j) / static_cast<double>(w - 1) : 0.0;
          refs(t, 1) = h > 1 ? static_cast<double>(i) / static_cast<double>(h - 1) : 0.0;
        }
      }
    }
  }
  for (const auto& layer : encoder) {
    Tensor queries({tokens, c});
    std::size_t off = 0;
    for (const auto& f : current) {
      std::copy(f.values().begin(), f.values().end(), queries.data() + off);
      off += f.size();
    }
    const Tensor attn = deformable_attn_2d(layer.attn, queries, refs, current);
    const Tensor updated = residual_block(layer.residual, queries, attn);
    off = 0;
    for (auto& f : current) {
      std::copy_n(updated.data() + off, f.size(), f.data());
      off += f.size();
    }
  }
  return current;
}

SceneVolume voxel_proposal_layer(SceneVolume scene, const MultiScaleFeatures& features,
                                 const DeformableBlockParams& params) {
  if (scene.proposal.empty()) return scene;
  std::vector<std::size_t> rows;
  Tensor refs({scene.proposal.size(), 2});
  for (std::size_t n = 0; n < scene.proposal.size(); ++n) {
    const auto& v = scene.proposal.voxels[n];
    rows.push_back(scene.grid.linear(v.index));
    refs(n, 0) = v.pixel.x();
    refs(n, 1) = v.pixel.y();
  }
  const Tensor q = gather_rows(scene.embeddings, rows);
  const Tensor attn = deformable_attn_2d(params.attn, q, refs, features);
  scatter_rows(scene.embeddings, rows, residual_block(params.residual, q, attn));
  return scene;
}

InstanceQueries stage_instance_from_image(InstanceQueries q, const MultiScaleFeatures& features,
                                          const DeformableBlockParams& params) {
  if (q.count() == 0) return q;
  const Tensor attn = deformable_attn_2d(params.attn, q.embeddings, q.ref_points_2d, features);
  q.embeddings = residual_block(params.residual, q.embeddings, attn);
  return q;
}

SceneVolume stage_scene_from_instance(SceneVolume scene, const InstanceQueries& q,
                                      const AttnBlockParams& params) {
  if (q.count() == 0) return scene;
  const auto rows = fov_indices(scene.fov_mask);
  if (rows.empty()) return scene;
  const Tensor vox = gather_rows(scene.embeddings, rows);
  const Tensor attn = cross_attn(params.attn, vox, q.embeddings, q.embeddings);
  scatter_rows(scene.embeddings, rows, residual_block(params.residual, vox, attn));
  return scene;
}

SceneVolume stage_scene_self_attn(SceneVolume scene, const DeformableBlockParams& params) {
  const auto rows = fov_indices(scene.fov_mask);
  if (rows.empty()) return scene;
  Tensor refs({rows.size(), 3});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Coord3 p = scene.grid.normalized(scene.grid.unlinear(rows[r]));
    for (std::size_t a = 0; a < 3; ++a) refs(r, a) = p[a];
  }
  const Tensor vox = gather_rows(scene.embeddings, rows);
  // Queries are the in-view voxels; samples are drawn from the whole volume
  // as it was before this stage.
  const Tensor attn = deformable_attn_3d(params.attn, vox, refs, scene.embeddings);
  scatter_rows(scene.embeddings, rows, residual_block(params.residual, vox, attn));
  return scene;
}

double query_depth(const DepthMap& depth, const Vec2& normalized, const CameraModel& cam,
                   const VoxelGridSpec& grid) {
  const std::size_t h = depth.height(), w = depth.width();
  const Vec2 px = cam.denormalize_pixel(normalized);
  const double u = std::clamp(px.x(), 0.0, static_cast<double>(w - 1));
  const double v = std::clamp(px.y(), 0.0, static_cast<double>(h - 1));
  const auto j0 = static_cast<std::size_t>(std::floor(u));
  const auto i0 = static_cast<std::size_t>(std::floor(v));
  const double fu = u - static_cast<double>(j0), fv = v - static_cast<double>(i0);

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    if (!depth.valid[i]) continue;
    lo = std::min(lo, depth.values[i]);
    hi = std::max(hi, depth.values[i]);
  }

  double acc = 0.0, wsum = 0.0;
  for (std::size_t di = 0; di < 2; ++di) {
    for (std::size_t dj = 0; dj < 2; ++dj) {
      const std::size_t i = i0 + di, j = j0 + dj;
      if (i >= h || j >= w || !depth.is_valid(i, j)) continue;
      const double wt = (di ? fv : 1.0 - fv) * (dj ? fu : 1.0 - fu);
      if (wt == 0.0) continue;
      acc += wt * depth.values(i, j);
      wsum += wt;
    }
  }
  if (wsum > 0.0) return std::clamp(acc / wsum, lo, hi);

  const Vec3 center = grid.origin + 0.5 * grid.extent();
  const double z = world_to_camera(cam, center).z();
  if (!(z > 0.0)) throw ConfigError("query_depth: grid center lies behind the camera");
  return z;
}

Tensor instance_reference_points_3d(const InstanceQueries& q, const CameraModel& cam,
                                    const DepthMap& depth, const VoxelGridSpec& grid) {
  const std::size_t n = q.count();
  if (n == 0) return Tensor();
  Tensor refs({n, 3});
  for (std::size_t r = 0; r < n; ++r) {
    const Vec2 p(q.ref_points_2d(r, 0), q.ref_points_2d(r, 1));
    const double z = query_depth(depth, p, cam, grid);
    const Vec3 world = lift_pixel(cam, cam.denormalize_pixel(p), z);
    const Coord3 g = grid.world_to_normalized(world);
    for (std::size_t a = 0; a < 3; ++a) refs(r, a) = g[a];
  }
  return refs;
}

InstanceQueries stage_instance_from_scene(InstanceQueries q, const SceneVolume& scene,
                                          const CameraModel& cam, const DepthMap& depth,
                                          const DeformableBlockParams& params) {
  if (q.count() == 0) return q;
  const Tensor refs = instance_reference_points_3d(q, cam, depth, scene.grid);
  const Tensor attn = deformable_attn_3d(params.attn, q.embeddings, refs, scene.embeddings);
  q.embeddings = residual_block(params.residual, q.embeddings, attn);
  return q;
}

InstanceQueries stage_instance_self_attn(InstanceQueries q, const AttnBlockParams& params) {
  if (q.count() == 0) return q;
  const Tensor attn = self_attn(params.attn, q.embeddings);
  q.embeddings = residual_block(params.residual, q.embeddings, attn);
  return q;
}

LayerState decoder_layer(SceneVolume scene, InstanceQueries instances, const DecoderContext& ctx,
                         const DecoderLayerParams& params, const StageFlags& flags) {
  const bool has_instances = instances.count() > 0;
  if (flags.instance_from_image && has_instances) {
    if (!ctx.features || ctx.features->empty()) {
      throw ConfigError("decoder_layer: instance<-image stage needs image features");
    }
    instances = stage_instance_from_image(std::move(instances), *ctx.features,
                                          params.instance_image);
  }
  if (flags.scene_from_instance && has_instances) {
    scene = stage_scene_from_instance(std::move(scene), instances, params.scene_instance);
  }
  if (flags.scene_self_attn) {
    scene = stage_scene_self_attn(std::move(scene), params.scene_self);
  }
  if (flags.instance_from_scene && has_instances) {
    if (!ctx.camera || !ctx.depth) {
      throw ConfigError("decoder_layer: instance<-scene stage needs a camera and a depth map");
    }
    instances = stage_instance_from_scene(std::move(instances), scene, *ctx.camera, *ctx.depth,
                                          params.instance_scene);
  }
  if (flags.instance_self_attn && has_instances) {
    instances = stage_instance_self_attn(std::move(instances), params.instance_self);
  }
  return LayerState{std::move(scene), std::move(instances)};
}

DecoderOutput run_decoder_stack(SceneVolume scene, InstanceQueries instances,
                                const DecoderContext& ctx,
                                const std::vector<DecoderLayerParams>& layers,
                                const StageFlags& flags) {
  if (layers.empty()) throw ConfigError("run_decoder_stack: at least one decoder layer required");
  DecoderOutput out;
  for (const auto& layer : layers) {
    auto state = decoder_layer(std::move(scene), std::move(instances), ctx, layer, flags);
    scene = std::move(state.scene);
    instances = std::move(state.instances);
    out.intermediates.push_back(scene.embeddings);
  }
  out.scene = std::move(scene);
  out.instances = std::move(instances);
  return out;
}

Tensor prediction_head(const Tensor& scene_feats, const HeadParams& head,
                       std::size_t upsample_factor) {
  Tensor sum = scene_feats;
  for (const auto& branch : head.aspp) sum = add(sum, conv3d_same(scene_feats, branch));
  const Tensor mixed = linear_apply(head.mix, sum);
  return upsample_trilinear(linear_apply(head.classifier, mixed), upsample_factor);
}

ForwardResult forward_pipeline(const PipelineConfig& config, const CameraModel& cam,
                               const DepthMap& depth, const MultiScaleFeatures& features,
                               const ModelParams& params) {
  config.validate();
  if (features.size() != config.feature_levels) {
    throw ConfigError("forward_pipeline: expected " + std::to_string(config.feature_levels) +
                      " feature levels, got " + std::to_string(features.size()));
  }
  for (const auto& f : features) {
    if (f.rank() != 3 || f.dim(2) != config.embed_dim) {
      throw ConfigError("forward_pipeline: feature maps must have embed_dim channels");
    }
  }
  if (params.decoder.size() != config.decoder_layers ||
      params.encoder.size() != config.encoder_layers) {
    throw ConfigError("forward_pipeline: parameter layer counts do not match the config");
  }

  ForwardResult r;
  r.initial_scene = init_scene(config, params, cam, depth);
  const MultiScaleFeatures encoded = encode_features(features, params.encoder);
  r.proposed_scene = voxel_proposal_layer(r.initial_scene, encoded, params.proposal);

  const DecoderContext ctx{&encoded, &cam, &depth};
  r.decoder = run_decoder_stack(r.proposed_scene, make_instance_queries(config, params.queries),
                                ctx, params.decoder, config.stages);
  for (const auto& state : r.decoder.intermediates) {
    r.aux_logits.push_back(prediction_head(state, params.head, 1));
  }
  r.logits = upsample_trilinear(r.aux_logits.back(), config.upsample_factor);
  return r;
}

}  // namespace ssc

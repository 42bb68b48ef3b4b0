#include "triage/actions.hpp"

#include <algorithm>

namespace triage {

FrameRange half_frames(int frames, int half) {
  const int mid = (frames + 1) / 2;
  return half == 0 ? FrameRange{0, mid} : FrameRange{mid, frames};
}

ActionSet ActionSet::batch(int num_objects, VolumeGrid grid) {
  if (num_objects <= 0) throw ConfigError("action set needs at least one object");
  ActionSet s;
  s.num_objects_ = num_objects;
  s.grid_ = grid;
  for (int h = 0; h < 2; ++h) {
    if (grid == VolumeGrid::kTemporalHalves) {
      s.volumes_.push_back({h, -1});
    } else {
      for (int c = 0; c < kSpatialCells; ++c) s.volumes_.push_back({h, c});
    }
  }
  for (int o = 0; o < num_objects; ++o)
    for (int v = 0; v < s.num_volumes(); ++v) s.actions_.push_back(DetectInVolume{o, v});
  return s;
}

ActionSet ActionSet::streaming(int num_objects) {
  if (num_objects <= 0) throw ConfigError("action set needs at least one object");
  ActionSet s;
  s.num_objects_ = num_objects;
  for (int o = 0; o < num_objects; ++o) s.actions_.push_back(DetectInBuffer{o});
  s.skip_ = num_objects;
  s.actions_.push_back(Skip{});
  return s;
}

ActionSet ActionSet::streaming_frames() {
  ActionSet s;
  s.actions_.push_back(ExtractFrame{});
  s.skip_ = 1;
  s.actions_.push_back(Skip{});
  return s;
}

int ActionSet::object_of(int m) const {
  const auto& a = actions_.at(m);
  if (const auto* d = std::get_if<DetectInVolume>(&a)) return d->object;
  if (const auto* d = std::get_if<DetectInBuffer>(&a)) return d->object;
  return -1;
}

std::string ActionSet::describe(int m) const {
  const auto& a = actions_.at(m);
  if (const auto* d = std::get_if<DetectInVolume>(&a)) {
    const Volume& v = volumes_[d->volume];
    std::string s = "detect(" + std::to_string(d->object) + ",half=" + std::to_string(v.half);
    if (v.cell >= 0) s += ",cell=" + std::to_string(v.cell);
    return s + ")";
  }
  if (const auto* d = std::get_if<DetectInBuffer>(&a))
    return "detect(" + std::to_string(d->object) + ",buffer)";
  if (std::holds_alternative<Skip>(a)) return "skip";
  return "extract";
}

VolumeGrid parse_grid(const std::string& name) {
  if (name == "halves" || name == "temporal") return VolumeGrid::kTemporalHalves;
  if (name == "spatial" || name == "2x2x2") return VolumeGrid::kSpatioTemporal;
  throw ConfigError("unknown volume grid '" + name + "' (expected halves|spatial)");
}

std::string grid_name(VolumeGrid grid) {
  return grid == VolumeGrid::kTemporalHalves ? "halves" : "spatial";
}

double observe_volume(const VideoRecord& video, int object, const Volume& volume) {
  if (object < 0 || object >= video.channels())
    throw ConfigError("object " + std::to_string(object) + " out of range");
  const FrameRange r = half_frames(video.frames(), volume.half);
  if (r.empty())
    throw ConfigError("video '" + video.id + "' has no frames in half " +
                      std::to_string(volume.half));
  if (volume.cell >= 0 && !video.cells)
    throw ConfigError("video '" + video.id + "' has no spatial cells for a spatial volume");
  double best = 0.0;
  for (int t = r.begin; t < r.end; ++t) {
    if (volume.cell >= 0 && (*video.cells)(t, object) != volume.cell) continue;
    best = std::max(best, video.scores(t, object));
  }
  return best;
}

Vec full_observations(const VideoRecord& video, const ActionSet& actions) {
  if (!actions.is_batch()) throw UsageError("full_observations needs a batch action set");
  Vec x(actions.size());
  for (int m = 0; m < actions.size(); ++m) {
    const auto& d = std::get<DetectInVolume>(actions[m]);
    x(m) = observe_volume(video, d.object, actions.volume(d.volume));
  }
  return x;
}

}  // namespace triage

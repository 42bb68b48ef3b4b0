#ifndef TRIAGE_ACTIONS_HPP
#define TRIAGE_ACTIONS_HPP

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "triage/data.hpp"

namespace triage {

/// Run detector `object` inside a space-time subvolume of the whole clip.
struct DetectInVolume {
  int object = 0;
  int volume = 0;
};
/// Run detector `object` on every frame currently held in the stream buffer.
struct DetectInBuffer {
  int object = 0;
};
/// Wait for the next frame without extracting anything.
struct Skip {};
/// Extract the dense descriptor of the newest buffered frame.
struct ExtractFrame {};

using ActionSpec = std::variant<DetectInVolume, DetectInBuffer, Skip, ExtractFrame>;

enum class VolumeGrid { kTemporalHalves, kSpatioTemporal };

/// Subvolume geometry relative to clip length: a temporal half and,
/// optionally, one cell of the 2x2 spatial grid (-1 means the whole frame).
struct Volume {
  int half = 0;
  int cell = -1;
};

struct FrameRange {
  int begin = 0;
  int end = 0;  // exclusive
  int size() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

/// Frames covered by temporal half `half` of a T-frame clip. The first half
/// takes the extra frame when T is odd.
FrameRange half_frames(int frames, int half);

class ActionSet {
 public:
  static ActionSet batch(int num_objects, VolumeGrid grid);
  /// N buffer detectors followed by Skip.
  static ActionSet streaming(int num_objects);
  /// ExtractFrame followed by Skip.
  static ActionSet streaming_frames();

  int size() const { return static_cast<int>(actions_.size()); }
  const ActionSpec& operator[](int m) const { return actions_.at(m); }
  int num_objects() const { return num_objects_; }
  int num_volumes() const { return static_cast<int>(volumes_.size()); }
  const Volume& volume(int v) const { return volumes_.at(v); }
  std::optional<VolumeGrid> grid() const { return grid_; }
  std::optional<int> skip_index() const { return skip_; }
  bool is_batch() const { return grid_.has_value(); }

  /// Index of the batch action (object, volume).
  int batch_index(int object, int volume) const { return object * num_volumes() + volume; }
  /// Detector object of action m, or -1 for Skip/ExtractFrame.
  int object_of(int m) const;
  std::string describe(int m) const;

 private:
  std::vector<ActionSpec> actions_;
  std::vector<Volume> volumes_;
  std::optional<VolumeGrid> grid_;
  std::optional<int> skip_;
  int num_objects_ = 0;
};

VolumeGrid parse_grid(const std::string& name);
std::string grid_name(VolumeGrid grid);

/// Maximum score of `object` over the frames (and spatial cell) of `volume`.
/// Frames whose detection lies in another cell contribute nothing; if no
/// frame qualifies the result is 0. Throws on an empty frame range.
double observe_volume(const VideoRecord& video, int object, const Volume& volume);

/// Observation of every batch action, in action order: the x~ vector.
Vec full_observations(const VideoRecord& video, const ActionSet& actions);

}  // namespace triage

#endif  // TRIAGE_ACTIONS_HPP

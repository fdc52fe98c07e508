//! 4D volume sequences, their on-disk format, stimulus schedules, dataset
//! splitting and the ground-truth phantom.

pub mod io;
pub mod normalize;
pub mod phantom;
pub mod schedule;
pub mod split;
pub mod volume;

pub use io::{read_dataset, read_parcellation, read_schedule, read_vseq, write_parcellation, write_schedule, write_vseq};
pub use normalize::{denormalize_sequence, normalize_sequence, NormParams};
pub use phantom::{make_phantom, ClassAmplitude, PhantomSpec, RoiSpec, ScheduleSpec};
pub use schedule::{build_block_schedule, schedule_from_blocks, Condition, StimulusSchedule};
pub use split::{split_dataset, split_with_sizes, DatasetSplit};
pub use volume::{Dims4, Label, Parcellation, VolumeSequence};

//! Diffusion-side machinery at toy scale.

pub mod attention;
pub mod checks;
pub mod conditioning;
pub mod latent;
pub mod noise;
pub mod schedule;
pub mod toy;

pub use attention::{cross_domain_attention, AttentionWeights, CrossAttention, Tokens};
pub use conditioning::{
    combine_conditioning, positional_encode, time_embedding, ConditionCode, ConditioningEmbedding, EmbeddingSource,
};
pub use latent::{forward_diffuse, recover_from_v, v_target, LatentTensor};
pub use noise::multires_noise;
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};
pub use toy::{toy_denoiser_step, ToyConfig, ToyParams, ToySample};

pub mod calibration;
pub mod curve;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod io;
pub mod model;
pub mod phantom;
pub mod schedule;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};
pub use image::{DynamicPetImage, InputFunction, Units};
pub use model::{
    BaselineConfig, BaselineModel, FcDlifModel, FeatureMatrix, InputFunctionModel, Model, ModelConfig, SfeConfig,
    TfeConfig,
};
pub use schedule::{Frame, FrameSchedule};

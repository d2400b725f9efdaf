pub(crate) mod conv;
pub(crate) mod deform;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pool;
pub(crate) mod shape;
pub(crate) mod spike;

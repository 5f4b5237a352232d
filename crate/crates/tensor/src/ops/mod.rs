pub(crate) mod conv;
pub(crate) mod loss;
pub(crate) mod norm;

pub mod heft_ref;

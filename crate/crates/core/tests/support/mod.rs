pub mod gst_oracle;

pub use gravalloc;
